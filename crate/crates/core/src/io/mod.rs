pub mod bundle;
pub mod json;
pub mod metadata;
pub mod newick;
pub mod table;
