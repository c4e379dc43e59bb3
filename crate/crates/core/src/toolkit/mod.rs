//! File formats and standard evaluation metrics.

pub mod flo;
pub mod image;
pub mod kitti;
pub mod metrics;
pub mod pgm;

pub use flo::{decode_flo, encode_flo, read_flo, write_flo};
pub use image::{read_image, read_label_png, write_gray_png, write_label_png, LabelImage};
pub use kitti::{
    decode_kitti_disparity, decode_kitti_flow, encode_kitti_disparity, encode_kitti_flow,
    read_kitti_disparity, read_kitti_flow, write_kitti_disparity, write_kitti_flow,
};
pub use metrics::{compute_epe_fl, EvalReport};
pub use pgm::{read_pgm, write_confidence_pgm};
