#![allow(dead_code)]

pub mod anomalies;
