pub mod autodiff;
pub mod circuit;
pub mod dist;
pub mod ground;
pub mod model;
pub mod oracle;
pub mod relax;
pub mod syntax;
pub mod trainer;
pub mod wmi;
