//! Round-trip public-transport accessibility to schools, computed under a
//! scheduled timetable and under delay-adjusted "actual" timetables.

pub mod config;
pub mod delay;
pub mod gtfs;
pub mod indices;
pub mod lucky_catch;
pub mod pipeline;
pub mod stats;
pub mod router;
pub mod street;
pub mod synth;
