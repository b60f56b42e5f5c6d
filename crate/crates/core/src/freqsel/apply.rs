//! Turning a selection into reconfiguration actions.

use std::collections::BTreeMap;

use super::select::Scope;
use crate::netstack::flood::FloodError;
use crate::netstack::{ConfigKey, ConfigMessage, ConfigValue, FloodMode, FreqPlanValue, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub enum ReconfigAction {
    /// Local scope: the node retunes its own receiver; neighbors learn the
    /// new frequency from its next discovery beacon.
    SetReceiveFrequency { node: NodeId, freq_hz: u64 },
    /// Global scope: the base floods a frequency plan.
    Flood(ConfigMessage),
}

/// Parameters for a global reconfiguration flood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloodContext {
    pub origin: NodeId,
    pub version: u64,
    pub activate_at_ms: u64,
}

pub fn apply_selection(scope: Scope, freq_hz: u64, ctx: FloodContext) -> Result<Vec<ReconfigAction>, FloodError> {
    match scope {
        Scope::Incoming(node) => Ok(vec![ReconfigAction::SetReceiveFrequency { node, freq_hz }]),
        Scope::NetworkWide => {
            let params = BTreeMap::from([(
                ConfigKey::FreqPlan,
                ConfigValue::Plan(FreqPlanValue::Assign { freq_hz, activate_at_ms: ctx.activate_at_ms }),
            )]);
            let msg = ConfigMessage::new(ctx.origin, FloodMode::Broadcast, vec![], params, ctx.version)?;
            Ok(vec![ReconfigAction::Flood(msg)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_and_global() {
        let ctx = FloodContext { origin: 1, version: 2, activate_at_ms: 60_000 };
        assert_eq!(
            apply_selection(Scope::Incoming(4), 903_000_000, ctx).unwrap(),
            vec![ReconfigAction::SetReceiveFrequency { node: 4, freq_hz: 903_000_000 }]
        );
        let acts = apply_selection(Scope::NetworkWide, 903_000_000, ctx).unwrap();
        let ReconfigAction::Flood(msg) = &acts[0] else { panic!("expected flood") };
        assert_eq!(msg.mode, FloodMode::Broadcast);
        assert_eq!(
            msg.params[&ConfigKey::FreqPlan],
            ConfigValue::Plan(FreqPlanValue::Assign { freq_hz: 903_000_000, activate_at_ms: 60_000 })
        );
    }
}
