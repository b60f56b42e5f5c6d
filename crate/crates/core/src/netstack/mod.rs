//! Convergecast routing, configuration flooding, distributed reset and the
//! gateway record format.

pub mod etx;
pub mod flood;
pub mod gateway;
pub mod rounds;
pub mod routing;

pub use etx::{etx_update, LinkEstimator};
pub use flood::{ConfigKey, ConfigMessage, ConfigValue, FloodMode, FloodState, FreqPlanValue};
pub use gateway::{gateway_emit, parse_record, GatewayPayload, GatewayRecord};
pub use rounds::{DeliveryReport, RoundNetwork};
pub use routing::{select_parent, NodeId, RouteAdvert, RoutingState, WavePhase};
