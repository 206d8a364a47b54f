pub mod config;
pub mod detection;
pub mod evalkit;
pub mod geometry;
pub mod kitti_io;
pub mod pipeline;
pub mod priors;
pub mod proposals;
pub mod refine_net;
pub mod synth;
pub mod car_models;
pub mod cli;
