//! Passive-latency defense toolkit against long-distance route
//! interception: geodesic feasibility analysis, per-prefix RTT lower
//! bounds, and a streaming minRTT changepoint detector with mitigation and
//! false-positive correction, plus a trace-replay/attack-injection
//! simulator to exercise it all.

pub mod attackgeo;
pub mod detector;
pub mod geodesy;
pub mod prefixtable;
pub mod rttsource;
pub mod simulator;
pub mod stats;
