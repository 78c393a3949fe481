//! The multi-flow diffuser: layer groups, layers, assembly and routing.

mod diffuser;
mod gradcheck;
pub mod layers;
mod store;

pub use diffuser::{
    assemble, layer_defs, sharing_report, uniform_sites, Diffuser, DiffuserConfig, LayerDef, RoutingTable,
    SharingReport, SiteContext, SitePlan, IMAGE_SITES, NUM_SITES, TEXT_SITES,
};
pub use gradcheck::{gradcheck_config, gradcheck_suite, GRADCHECK_KINDS};
pub use store::{LayerGroup, Param, ParamBinder, ParamSource, ParameterStore, VarMap};
