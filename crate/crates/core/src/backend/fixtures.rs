//! Small named tasks used by tests, benches and the acceptance suite.

use ndarray::{array, Array2};

use super::data::{make_blobs, make_blobs_around, DatasetSplit, InMemoryData};
use super::BackendError;

/// Two tight classes whose centers are 4 apart: (2, 0) and (-2, 0), spread 0.1,
/// 32 samples per class.
pub fn separable(seed: u64) -> Result<InMemoryData, BackendError> {
    let centers = array![[2.0, 0.0], [-2.0, 0.0]];
    let (train, validation) = make_blobs_around(&centers, 32, 0.1, seed)?;
    Ok(InMemoryData::new(train, validation))
}

/// One input repeated with both labels. No model can get below ln 2 on it.
pub fn contradictory_pair() -> Result<InMemoryData, BackendError> {
    let x = array![[1.0, -0.5], [1.0, -0.5]];
    let split = DatasetSplit::new(x, vec![0, 1], 2)?;
    Ok(InMemoryData::new(split.clone(), split))
}

/// Three overlapping classes in 2-D, spread 1.5, 50 samples per class.
pub fn noisy_blobs(seed: u64) -> Result<InMemoryData, BackendError> {
    let (train, validation) = make_blobs(50, 2, 3, 1.5, 2.0, seed)?;
    Ok(InMemoryData::new(train, validation))
}

/// Rotates 2-D `centers` counter-clockwise by `degrees`.
pub fn rotate_2d(centers: &Array2<f64>, degrees: f64) -> Array2<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let rot = array![[c, s], [-s, c]];
    centers.dot(&rot)
}
