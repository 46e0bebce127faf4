pub mod baseline;
pub mod datastore;
pub mod experiment;
pub mod grid;
pub mod hours;
pub mod model;
pub mod preprocess;
pub mod tape;
pub mod verify;
