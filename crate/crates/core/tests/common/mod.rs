#![allow(dead_code)]

pub mod flat;
pub mod steppers;
