//! Image ingestion, geometry reconciliation, augmentation and epoch iteration.

mod dataset;
mod image_io;
pub mod synthetic;
mod transform;

pub use dataset::{
    is_image_file, list_images, Dataset, DatasetConfig, Domain, EpochIter, Pairing, Sample, TEST_RGB,
    TEST_THERMAL, TRAIN_RGB, TRAIN_THERMAL,
};
pub use image_io::{load_image, save_png, to_rgb8};
pub use transform::{
    augment, bilinear_resize, center_square, from_model_range, geometry_normalize, hflip, rotate90,
    to_model_range, vflip, Augment, CropMode,
};
