//! Modalities and the flow grid.
//!
//! A flow synthesizes one output modality from a context of one modality.
//! With two modalities there are four flows; each activates the shared
//! global layers plus exactly one data-layer group and one context-layer
//! group.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Image, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

/// `(output, context)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowSpec {
    pub output: Modality,
    pub context: Modality,
}

impl FlowSpec {
    pub const T2I: FlowSpec = FlowSpec::new(Modality::Image, Modality::Text);
    pub const IV: FlowSpec = FlowSpec::new(Modality::Image, Modality::Image);
    pub const I2T: FlowSpec = FlowSpec::new(Modality::Text, Modality::Image);
    pub const TV: FlowSpec = FlowSpec::new(Modality::Text, Modality::Text);

    /// The four flows in canonical order.
    pub const ALL: [FlowSpec; 4] = [FlowSpec::T2I, FlowSpec::IV, FlowSpec::I2T, FlowSpec::TV];

    pub const fn new(output: Modality, context: Modality) -> Self {
        Self { output, context }
    }

    pub fn short_name(self) -> &'static str {
        match (self.output, self.context) {
            (Modality::Image, Modality::Text) => "t2i",
            (Modality::Image, Modality::Image) => "iv",
            (Modality::Text, Modality::Image) => "i2t",
            (Modality::Text, Modality::Text) => "tv",
        }
    }
}

impl fmt::Display for FlowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FlowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t2i" => Ok(FlowSpec::T2I),
            "iv" => Ok(FlowSpec::IV),
            "i2t" => Ok(FlowSpec::I2T),
            "tv" => Ok(FlowSpec::TV),
            other => Err(Error::arg(format!("unknown flow '{other}' (expected t2i|iv|i2t|tv)"))),
        }
    }
}

/// Parses a comma-separated flow list such as `iv,t2i`.
pub fn parse_flow_list(s: &str) -> Result<Vec<FlowSpec>> {
    let mut flows = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let flow: FlowSpec = part.parse()?;
        if flows.contains(&flow) {
            return Err(Error::arg(format!("flow '{flow}' listed twice")));
        }
        flows.push(flow);
    }
    Ok(flows)
}

pub fn render_flow_list(flows: &[FlowSpec]) -> String {
    flows.iter().map(|f| f.short_name()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_flows_have_expected_pairs() {
        assert_eq!(FlowSpec::T2I, FlowSpec::new(Modality::Image, Modality::Text));
        assert_eq!(FlowSpec::IV, FlowSpec::new(Modality::Image, Modality::Image));
        assert_eq!(FlowSpec::I2T, FlowSpec::new(Modality::Text, Modality::Image));
        assert_eq!(FlowSpec::TV, FlowSpec::new(Modality::Text, Modality::Text));
    }

    #[test]
    fn flow_list_round_trips() {
        let flows = parse_flow_list("iv, t2i,i2t").unwrap();
        assert_eq!(flows, vec![FlowSpec::IV, FlowSpec::T2I, FlowSpec::I2T]);
        assert_eq!(render_flow_list(&flows), "iv,t2i,i2t");
        assert!(parse_flow_list("iv,iv").is_err());
        assert!(parse_flow_list("x2y").is_err());
    }
}
