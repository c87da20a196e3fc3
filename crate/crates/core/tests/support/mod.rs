#![allow(dead_code)]

pub mod fuzz;
pub mod gradcheck;
pub mod histories;
