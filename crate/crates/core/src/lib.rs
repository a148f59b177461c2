//! Core of the social digital twinner: an Agent/Group/Role simulation engine,
//! geographic queries, infrastructure ingestion, synthetic population
//! synthesis, the school-dropout scenario and the grounded conversation layer.

pub mod agr;
pub mod geo;
pub mod ingest;
pub mod interlocutor;
pub mod population;
pub mod scenario;
