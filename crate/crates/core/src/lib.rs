//! Real-time deployment of quadcopter fleets between moving formations:
//! spatial planning with a separation certificate, smooth temporal
//! schedules, feedback-linearizing tracking control and closed-loop
//! simulation with safety monitoring.

pub mod attitude;
pub mod cli;
pub mod controller;
pub mod export;
pub mod jets;
pub mod planner;
pub mod quadrotor;
pub mod scenario;
pub mod scenarios;
pub mod simulator;
pub mod trajectory;

#[cfg(test)]
#[path = "../tests/common/mod.rs"]
mod test_support;
