use rand::Rng as _;

use avnav_tensor::Tensor;

use super::metrics::{actions_to_goal, step_state, table_lookup};
use crate::env::Action;
use crate::error::Result;
use crate::policy::{act, ActMode, Policy};
use crate::seed::Rng;
use crate::sim::{NavEnv, Observation};

pub trait Agent {
    /// Called once before the first action of every episode.
    fn begin(&mut self, env: &NavEnv) -> Result<()>;
    fn act(&mut self, obs: &Observation, env: &NavEnv) -> Result<Action>;
}

/// Acts greedily with a trained policy.
pub struct PolicyAgent<'a> {
    policy: &'a Policy,
    hidden: Tensor,
    rng: Rng,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(policy: &'a Policy) -> Self {
        Self {
            policy,
            hidden: policy.net.zero_hidden(1),
            rng: crate::seed::stream(0, "greedy", 0),
        }
    }
}

impl Agent for PolicyAgent<'_> {
    fn begin(&mut self, _env: &NavEnv) -> Result<()> {
        self.hidden = self.policy.net.zero_hidden(1);
        Ok(())
    }

    fn act(&mut self, obs: &Observation, _env: &NavEnv) -> Result<Action> {
        let (logits, _, hidden) = self.policy.act_step(&[obs], &self.hidden)?;
        self.hidden = hidden;
        Ok(act(logits.data(), &mut self.rng, ActMode::Greedy)?.0)
    }
}

/// Uniformly random actions.
pub struct RandomAgent {
    rng: Rng,
}

impl RandomAgent {
    pub fn new(rng: Rng) -> Self {
        Self { rng }
    }
}

impl Agent for RandomAgent {
    fn begin(&mut self, _env: &NavEnv) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _obs: &Observation, _env: &NavEnv) -> Result<Action> {
        Ok(Action::ALL[self.rng.random_range(0..Action::COUNT)])
    }
}

/// Privileged agent following a shortest action sequence to the source.
#[derive(Default)]
pub struct OracleAgent {
    table: Vec<u32>,
}

impl Agent for OracleAgent {
    fn begin(&mut self, env: &NavEnv) -> Result<()> {
        self.table = actions_to_goal(env.scene(), env.episode().source);
        Ok(())
    }

    fn act(&mut self, _obs: &Observation, env: &NavEnv) -> Result<Action> {
        if env.at_source() {
            return Ok(Action::Stop);
        }
        let scene = env.scene();
        let best = [Action::MoveForward, Action::TurnLeft, Action::TurnRight]
            .into_iter()
            .min_by_key(|&a| table_lookup(scene, &self.table, step_state(scene, env.pose(), a)))
            .unwrap_or(Action::MoveForward);
        Ok(best)
    }
}
