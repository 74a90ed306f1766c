use std::collections::BTreeMap;
use std::path::Path;

use super::{DetectError, Detection, DetectorBackend, Frame};

/// Scripted backend: returns fixed detections per image id.
///
/// Fixture files are JSON objects mapping image ids to detection lists:
/// `{"frame_001": [{"class_id": 0, "cx": 0.5, "cy": 0.5, "w": 0.2, "h": 0.1, "confidence": 0.9}]}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockBackend {
    scripted: BTreeMap<String, Vec<Detection>>,
    input_size: Option<(u32, u32)>,
}

impl MockBackend {
    pub fn new(scripted: BTreeMap<String, Vec<Detection>>) -> Self {
        Self {
            scripted,
            input_size: None,
        }
    }

    /// Make region crops arrive stretched to `size`, like a real network input.
    pub fn with_input_size(mut self, size: (u32, u32)) -> Self {
        self.input_size = Some(size);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, DetectError> {
        let scripted: BTreeMap<String, Vec<Detection>> =
            serde_json::from_str(text).map_err(|e| DetectError::FixtureParse(e.to_string()))?;
        for (id, dets) in &scripted {
            if let Some(bad) = dets.iter().find(|d| !d.is_valid()) {
                return Err(DetectError::FixtureParse(format!(
                    "invalid detection for {id:?}: {bad:?}"
                )));
            }
        }
        Ok(Self::new(scripted))
    }

    pub fn from_file(path: &Path) -> Result<Self, DetectError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| DetectError::FixtureParse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.scripted).expect("detections serialize")
    }

    pub fn insert(&mut self, id: impl Into<String>, dets: Vec<Detection>) {
        self.scripted.insert(id.into(), dets);
    }
}

impl DetectorBackend for MockBackend {
    fn input_size(&self) -> Option<(u32, u32)> {
        self.input_size
    }

    fn detect(&mut self, frame: &Frame<'_>, conf_threshold: f64) -> Result<Vec<Detection>, DetectError> {
        Ok(self
            .scripted
            .get(frame.id)
            .map(|dets| {
                dets.iter()
                    .filter(|d| d.confidence >= conf_threshold)
                    .copied()
                    .collect()
            })
            .unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ImageBuffer;

    const FIXTURE: &str = r#"{"a": [
        {"class_id": 0, "cx": 0.5, "cy": 0.5, "w": 0.2, "h": 0.2, "confidence": 0.95},
        {"class_id": 1, "cx": 0.2, "cy": 0.3, "w": 0.1, "h": 0.1, "confidence": 0.7}
    ]}"#;

    #[test]
    fn scripted_lookup_and_filter() {
        let img = ImageBuffer::filled(4, 4, [0; 3]).unwrap();
        let mut m = MockBackend::from_json(FIXTURE).unwrap();
        assert_eq!(m.detect(&Frame::new("a", &img), 0.0).unwrap().len(), 2);
        let high = m.detect(&Frame::new("a", &img), 0.9).unwrap();
        assert_eq!(high.len(), 1);
        assert_eq!(high[0].confidence, 0.95);
        assert!(m.detect(&Frame::new("zzz", &img), 0.0).unwrap().is_empty());
    }

    #[test]
    fn bad_fixtures_are_rejected() {
        assert!(matches!(MockBackend::from_json("{"), Err(DetectError::FixtureParse(_))));
        let bad_conf = r#"{"a": [{"class_id": 0, "cx": 0.5, "cy": 0.5, "w": 0.2, "h": 0.2, "confidence": 1.5}]}"#;
        assert!(matches!(
            MockBackend::from_json(bad_conf),
            Err(DetectError::FixtureParse(_))
        ));
    }

    #[test]
    fn json_roundtrip() {
        let m = MockBackend::from_json(FIXTURE).unwrap();
        assert_eq!(MockBackend::from_json(&m.to_json()).unwrap(), m);
    }
}
