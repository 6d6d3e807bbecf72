//! Procedural categories, posed partial-view crops with exact ground truth,
//! and the record files they are stored in.

mod io;
mod render;
mod shapes;

pub use io::{
    prediction_to_line, read_dataset, read_predictions, sample_to_line, write_dataset,
    write_predictions, Prediction,
};
pub use render::{
    generate, pose_for, render_crop, splitmix64, Annotation, Crop, GenConfig, RenderConfig,
    Sample,
};
pub use shapes::{gen_box, gen_shape, CanonicalModel, Category, MODEL_POINTS};
