//! Shared fixture: the toy detector trained with default parameters,
//! cached under the cargo target directory.

use std::path::PathBuf;
use std::sync::OnceLock;

use transcender::detector::{load_checkpoint, save_checkpoint, train_from_params, DetectorConfig, TrainParams};
use transcender::Detector64;

pub fn trained_detector_path() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("toy_detector_seed7.ckpt")
}

/// Loads the cached detector, training and caching it on first use.
pub fn trained_detector() -> &'static Detector64 {
    static DETECTOR: OnceLock<Detector64> = OnceLock::new();
    DETECTOR.get_or_init(|| {
        let path = trained_detector_path();
        if let Ok(det) = load_checkpoint(&path) {
            return det;
        }
        let params = TrainParams::default();
        let (model, report) = train_from_params(DetectorConfig::default(), &params).expect("detector training");
        eprintln!("trained toy detector: mAP {:.3}", report.map);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        save_checkpoint(&model, &tmp).expect("write checkpoint");
        std::fs::rename(&tmp, &path).expect("publish checkpoint");
        load_checkpoint(&path).expect("reload checkpoint")
    })
}
