//! Recurrent actor-critic with an adversarial audio classifier and a source
//! direction predictor.

mod net;
mod schedule;

pub use net::{
    encode_observations, ActMode, Heads, ParamGroup, Policy, PolicyConfig, PolicyNet, PolicyOutput, SeqInput,
    SeqVars, ANGLE_DIM,
};
pub use schedule::{act, decode_angle, lambda_schedule, ScheduleState};
