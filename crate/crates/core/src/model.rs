//! The full system: hypernetwork φ, shared actor body θ_w̄ and the frozen
//! evaluator, all held in one parameter store.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerank_autodiff::ParamStore;

use crate::actor::{self, ActorSpec, Constraints, FixedInsertion, Mode, RankedList};
use crate::config::{check_weights, RunConfig};
use crate::error::{Error, Result};
use crate::evaluator::{self, EvaluatorSpec};
use crate::hypernet::{self, HyperSpec, ParamSplitSpec};
use crate::instance::{input_width, Instance};
use crate::utilities::{self, PageRef};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: RunConfig,
    pub actor: ActorSpec,
    pub evaluator: EvaluatorSpec,
    pub hyper: HyperSpec,
    pub split: ParamSplitSpec,
    pub params: ParamStore,
}

impl Model {
    pub fn specs(config: &RunConfig) -> (ActorSpec, EvaluatorSpec, HyperSpec, ParamSplitSpec) {
        let d = &config.data;
        let m = &config.model;
        let input = input_width(d.feature_dim, d.feature_dim);
        let actor = ActorSpec {
            input,
            embed: m.item_embed,
            enc_hidden: m.enc_hidden,
            state: m.state,
            head_hidden: m.head_hidden,
            context_window: m.context_window,
            n: d.n,
        };
        let evaluator = EvaluatorSpec {
            input,
            embed: m.eval_embed,
            embed_hidden: m.eval_embed_hidden,
            fc: m.eval_fc,
            heads: m.eval_heads,
            rnn: m.eval_rnn,
            hidden: m.eval_hidden,
            n: d.n,
        };
        let split = ParamSplitSpec {
            head: actor.head_shapes(),
            body: actor.body_shapes(),
        };
        let hyper = HyperSpec {
            n_utilities: config.utilities.len(),
            hidden: m.hyper_hidden,
            output: split.head_len(),
            init_scale: m.hyper_init_scale,
        };
        (actor, evaluator, hyper, split)
    }

    /// Fresh parameters from `config.seed`.
    pub fn init(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (actor, evaluator, hyper, split) = Self::specs(&config);
        split.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let body = actor.init_body(&mut rng)?;
        let head = actor.init_head(&mut rng)?;
        let phi = hyper.init(&split, &head, &mut rng)?;
        let eval = evaluator.init(&mut rng)?;
        let params = phi.merged(&body)?.merged(&eval)?;
        Ok(Self {
            config,
            actor,
            evaluator,
            hyper,
            split,
            params,
        })
    }

    pub fn phi(&self) -> ParamStore {
        self.params.filter_prefix(hypernet::PREFIX)
    }

    pub fn body(&self) -> ParamStore {
        self.params.filter_prefix(actor::BODY)
    }

    pub fn evaluator_params(&self) -> ParamStore {
        self.params.filter_prefix(evaluator::PREFIX)
    }

    /// Replaces every evaluator tensor with the ones in `eval`.
    pub fn set_evaluator(&mut self, eval: &ParamStore) -> Result<()> {
        let current = self.evaluator_params();
        for (name, t) in current.iter() {
            let new = eval
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("evaluator store is missing `{name}`")))?;
            if new.shape() != t.shape() {
                return Err(Error::Invalid(format!("`{name}` has shape {:?}, expected {:?}", new.shape(), t.shape())));
            }
            self.params.set(name, new.clone());
        }
        Ok(())
    }

    pub fn caps(&self) -> Vec<f64> {
        self.config.caps()
    }

    pub fn check_weights(&self, w: &[f64]) -> Result<()> {
        check_weights(w, &self.caps())
    }

    /// Complete actor parameters for preference `w`.
    pub fn actor_params(&self, w: &[f64]) -> Result<ParamStore> {
        self.check_weights(w)?;
        let head = self.hyper.generate(&self.params, &self.split, w)?;
        hypernet::assemble(&head, &self.body(), &self.split)
    }

    pub fn instance(&self, sample: &crate::data::LogSample) -> Result<Instance> {
        let inst = Instance::from_sample(sample)?;
        self.check_instance(&inst)?;
        Ok(inst)
    }

    pub fn check_instance(&self, inst: &Instance) -> Result<()> {
        if inst.width() != self.actor.input {
            return Err(Error::Invalid(format!(
                "feature rows have width {}, the model expects {}",
                inst.width(),
                self.actor.input
            )));
        }
        Ok(())
    }

    /// Re-ranks one candidate set for preference `w`.
    pub fn rerank(
        &self,
        inst: &Instance,
        w: &[f64],
        fixed: &[FixedInsertion],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<RankedList> {
        self.check_weights(w)?;
        self.check_instance(inst)?;
        let constraints = Constraints::resolve(fixed, &inst.candidates, self.actor.n)?;
        let params = self.actor_params(w)?;
        self.actor.generate_list(&params, inst, &constraints, mode, rng)
    }

    /// Evaluator click probabilities of each list.
    pub fn predictions(&self, lists: &[(&Instance, &[usize])]) -> Result<Vec<Vec<f64>>> {
        self.evaluator.predict_many(&self.params, lists)
    }

    /// Utility vector of a batch of lists.
    pub fn utility_vector(&self, lists: &[(&Instance, &[usize])]) -> Result<Vec<f64>> {
        let preds = self.predictions(lists)?;
        let items: Vec<Vec<&crate::data::Item>> = lists.iter().map(|(inst, l)| inst.items(l)).collect();
        let pages: Vec<PageRef> = items
            .iter()
            .zip(lists)
            .map(|(it, (inst, _))| PageRef {
                items: it,
                pool: &inst.candidates,
            })
            .collect();
        utilities::utility_vector(&self.config.utilities, &pages, Some(&preds))
    }
}
