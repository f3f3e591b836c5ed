//! Small configurations and models for fast tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use steerank_autodiff::ParamStore;
use steerank_core::actor::ActorSpec;
use steerank_core::config::{lambda_utilities, ModelConfig, RunConfig};
use steerank_core::instance::input_width;

/// Narrow model widths so finite-difference checks stay cheap.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        item_embed: 4,
        enc_hidden: 5,
        state: 3,
        head_hidden: 4,
        hyper_hidden: 4,
        hyper_init_scale: 0.1,
        context_window: 2,
        eval_embed: 4,
        eval_embed_hidden: 5,
        eval_fc: 2,
        eval_heads: 2,
        eval_rnn: 3,
        eval_hidden: 5,
    }
}

/// λ-preset run over a small world: `m` candidates, lists of `n`, feature
/// dimension 3, tiny widths.
pub fn tiny_config(m: usize, n: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.data.n_items = 200;
    c.data.n_users = 40;
    c.data.n_sellers = 5;
    c.data.n_categories = 4;
    c.data.feature_dim = 3;
    c.data.m = m;
    c.data.n = n;
    c.data.n_train = 400;
    c.data.n_test = 100;
    c.data.demo_sessions = 4;
    c.model = tiny_model();
    c.utilities = lambda_utilities();
    c.train.batch = 8;
    c.train.eval_batch = 8;
    c.train.steps = 20;
    c.train.eval_steps = 20;
    c
}

/// Actor spec over rows built from `dim`-dimensional item and user features.
pub fn actor_spec(dim: usize, n: usize) -> ActorSpec {
    let m = tiny_model();
    ActorSpec {
        input: input_width(dim, dim),
        embed: m.item_embed,
        enc_hidden: m.enc_hidden,
        state: m.state,
        head_hidden: m.head_hidden,
        context_window: m.context_window,
        n,
    }
}

/// Complete random actor parameters (body and head) for `spec`.
pub fn actor_params(spec: &ActorSpec, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = spec.init_body(&mut rng).expect("body init");
    let head = spec.init_head(&mut rng).expect("head init");
    body.merged(&head).expect("disjoint")
}
