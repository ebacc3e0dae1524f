pub mod forge;
pub mod sim;
pub mod wire;
pub mod zone;
