#![allow(dead_code)]

pub mod covis_oracle;
pub mod criteria;
pub mod gradcheck;
