//! Regenerate the synthetic demo fixtures.
//!
//! `cargo run -p rivermon --example make_fixtures -- <dir>` writes blob
//! frames, YOLO labels, a scripted detector fixture and matching configs.

use std::fs;
use std::path::PathBuf;

use rivermon::dataset;
use rivermon::detection::{Detection, MockBackend};
use rivermon::synth::{rect_to_box, write_blob_sequence};

const FRAMES: usize = 12;
const W: u32 = 160;
const H: u32 = 120;
const BLOB: u32 = 40;

const RUN_TOML: &str = r#"input = "frames"
output = "out"
ground_truth = "labels"
classes = ["crayfish", "plastic"]
conf_threshold = 0.25
nms_iou = 0.45
seed = 7

[backend]
kind = "mock"
fixture = "mock.json"

[segmentation]
enabled = true
min_area = 64
components = "auto"
"#;

const AUGMENT_TOML: &str = r#"target_size = 416
flip_h_p = 0.5
flip_v_p = 0.5
max_zoom = 0.49
hue_shift_range = 25
sat_shift_range = 0.42
exposure_range = 0.22
grayscale_p = 0.47
mosaic_enabled = true
outputs_per_image = 3
seed = 0
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let frames = root.join("frames");
    let labels = root.join("labels");
    fs::create_dir_all(&frames)?;
    fs::create_dir_all(&labels)?;

    let mut mock = MockBackend::default();
    for (i, (path, blob)) in write_blob_sequence(&frames, FRAMES, W, H, BLOB)?.iter().enumerate() {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let class = i % 2;
        dataset::write_label_file(&labels.join(format!("{stem}.txt")), &[rect_to_box(class, *blob, W, H)])?;
        let conf = 0.55 + (i % 8) as f64 * 0.05;
        let mut dets = vec![Detection::new(class, 0.5, 0.5, 0.95, 0.95, conf)];
        // every fourth frame also gets a wrong-class guess on the same crop
        if i % 4 == 3 {
            dets.push(Detection::new(1 - class, 0.5, 0.5, 0.9, 0.9, 0.3));
        }
        mock.insert(format!("{stem}#0"), dets);
    }
    fs::write(root.join("mock.json"), mock.to_json() + "\n")?;
    fs::write(root.join("run.toml"), RUN_TOML)?;
    fs::write(root.join("augment.toml"), AUGMENT_TOML)?;
    println!("wrote {FRAMES} frames to {}", frames.display());
    Ok(())
}
