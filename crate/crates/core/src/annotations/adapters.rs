//! Source-record adapters.
//!
//! Every schema is line-delimited JSON, one frame per line. Pixel boxes are
//! integer arrays `[x1, y1, x2, y2]`.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    normalize_box, AnnotationError, BoundingBox, DirectionLabel, FrameAnnotation,
    InstrumentObservation, MotionPolicy, PixelBox, SourceQa, SourceQaKind, TissueObservation,
};
use crate::generation::SubTask;

pub const ENDOVIS_DEFAULT_SIZE: (u32, u32) = (1280, 1024);
pub const COPESD_DEFAULT_SIZE: (u32, u32) = (1306, 1009);
pub const CHOLEC80_DEFAULT_SIZE: (u32, u32) = (854, 480);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Endovis,
    Copesd,
    Cholec80,
    Canonical,
}

impl Schema {
    pub fn as_str(self) -> &'static str {
        match self {
            Schema::Endovis => "endovis",
            Schema::Copesd => "copesd",
            Schema::Cholec80 => "cholec80",
            Schema::Canonical => "canonical",
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schema {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "endovis" => Ok(Schema::Endovis),
            "copesd" => Ok(Schema::Copesd),
            "cholec80" => Ok(Schema::Cholec80),
            "canonical" => Ok(Schema::Canonical),
            other => Err(AnnotationError::UnknownSchema(other.to_string())),
        }
    }
}

/// Adapter output: the canonical frame plus non-fatal findings.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub frame: FrameAnnotation,
    pub warnings: Vec<String>,
}

fn decode<T: DeserializeOwned>(value: &Value) -> Result<T, AnnotationError> {
    serde_path_to_error::deserialize(value.clone()).map_err(|e| AnnotationError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn normalize_at(
    frame_id: &str,
    path: &str,
    px: PixelBox,
    size: (u32, u32),
) -> Result<BoundingBox, AnnotationError> {
    normalize_box(px, size.0, size.1).map_err(|e| AnnotationError::Validation {
        frame_id: frame_id.to_string(),
        message: format!("{path}: {e}"),
    })
}

fn parse_direction(path: &str, raw: &str) -> Result<DirectionLabel, AnnotationError> {
    raw.parse().map_err(|e: AnnotationError| AnnotationError::Schema {
        path: path.to_string(),
        message: e.to_string(),
    })
}

fn finish(frame: FrameAnnotation, policy: &MotionPolicy) -> Result<FrameAnnotation, AnnotationError> {
    frame.validate(policy)?;
    Ok(frame)
}

// ---- EndoVis-VQLA ----------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndovisRecord {
    frame_id: String,
    image_path: String,
    #[serde(default)]
    image_size: Option<(u32, u32)>,
    objects: Vec<EndovisObject>,
    target_tissue: EndovisTissue,
    #[serde(default)]
    description: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndovisObject {
    instrument: String,
    action: String,
    #[serde(rename = "box")]
    bbox: PixelBox,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndovisTissue {
    name: String,
    #[serde(rename = "box", default)]
    bbox: Option<PixelBox>,
}

/// Instrument/action/tissue records with pixel boxes. Sources without
/// direction annotations are validated with [`MotionPolicy::relaxed`].
pub fn adapt_endovis(record: &Value) -> Result<Adapted, AnnotationError> {
    let rec: EndovisRecord = decode(record)?;
    let size = rec.image_size.unwrap_or(ENDOVIS_DEFAULT_SIZE);
    let mut instruments = Vec::with_capacity(rec.objects.len());
    for (i, obj) in rec.objects.into_iter().enumerate() {
        let bbox = normalize_at(&rec.frame_id, &format!("objects[{i}].box"), obj.bbox, size)?;
        instruments.push(InstrumentObservation {
            category: obj.instrument.trim().to_string(),
            bbox: Some(bbox),
            motion: Some(obj.action.trim().to_lowercase()),
            direction: None,
        });
    }
    let tissue_box = rec
        .target_tissue
        .bbox
        .map(|px| normalize_at(&rec.frame_id, "target_tissue.box", px, size))
        .transpose()?;
    let frame = FrameAnnotation {
        frame_id: rec.frame_id,
        image_path: rec.image_path,
        image_size: size,
        source: Schema::Endovis.to_string(),
        instruments,
        tissues: vec![TissueObservation {
            name: rec.target_tissue.name.trim().to_string(),
            bbox: tissue_box,
        }],
        phase: None,
        description_seed: rec.description,
        source_qa: vec![],
    };
    Ok(Adapted {
        frame: finish(frame, &MotionPolicy::relaxed())?,
        warnings: vec![],
    })
}

// ---- CoPESD ----------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CopesdRecord {
    frame_id: String,
    image_path: String,
    #[serde(default)]
    image_size: Option<(u32, u32)>,
    annotations: Vec<CopesdAnnotation>,
    target_tissue: Vec<EndovisTissue>,
    #[serde(default)]
    description: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CopesdAnnotation {
    instrument: String,
    motion: String,
    #[serde(default)]
    direction: Option<String>,
    #[serde(rename = "box")]
    bbox: PixelBox,
}

/// Motion-annotated records; image size defaults to 1306x1009.
pub fn adapt_copesd(record: &Value) -> Result<Adapted, AnnotationError> {
    let rec: CopesdRecord = decode(record)?;
    let size = rec.image_size.unwrap_or(COPESD_DEFAULT_SIZE);
    let mut instruments = Vec::with_capacity(rec.annotations.len());
    for (i, a) in rec.annotations.into_iter().enumerate() {
        let bbox = normalize_at(&rec.frame_id, &format!("annotations[{i}].box"), a.bbox, size)?;
        let direction = a
            .direction
            .as_deref()
            .map(|d| parse_direction(&format!("annotations[{i}].direction"), d))
            .transpose()?;
        instruments.push(InstrumentObservation {
            category: a.instrument.trim().to_string(),
            bbox: Some(bbox),
            motion: Some(a.motion.trim().to_lowercase()),
            direction,
        });
    }
    let mut tissues = Vec::with_capacity(rec.target_tissue.len());
    for (i, t) in rec.target_tissue.into_iter().enumerate() {
        let bbox = t
            .bbox
            .map(|px| normalize_at(&rec.frame_id, &format!("target_tissue[{i}].box"), px, size))
            .transpose()?;
        tissues.push(TissueObservation {
            name: t.name.trim().to_string(),
            bbox,
        });
    }
    let frame = FrameAnnotation {
        frame_id: rec.frame_id,
        image_path: rec.image_path,
        image_size: size,
        source: Schema::Copesd.to_string(),
        instruments,
        tissues,
        phase: None,
        description_seed: rec.description,
        source_qa: vec![],
    };
    Ok(Adapted {
        frame: finish(frame, &MotionPolicy::default())?,
        warnings: vec![],
    })
}

// ---- Cholec80-VQA ----------------------------------------------------------

#[derive(Deserialize)]
struct Cholec80Record {
    frame_id: String,
    image_path: String,
    #[serde(default)]
    image_size: Option<(u32, u32)>,
    #[serde(default)]
    phase: Option<String>,
    #[serde(default)]
    tools: Vec<String>,
    qa: Vec<Cholec80Qa>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Cholec80Qa {
    kind: SourceQaKind,
    question: String,
    answer: String,
    #[serde(default)]
    subtask: Option<SubTask>,
}

const IGNORED_BOX_KEYS: [&str; 3] = ["box", "boxes", "bbox"];

/// Tool/phase QA records without localization.
///
/// QA pairs without an explicit `subtask` are tagged IC when the answer
/// names one of the listed tools and IM otherwise.
pub fn adapt_cholec80(record: &Value) -> Result<Adapted, AnnotationError> {
    let mut warnings = Vec::new();
    let mut stripped = record.clone();
    if let Some(obj) = stripped.as_object_mut() {
        for key in IGNORED_BOX_KEYS {
            if obj.remove(key).is_some() {
                warnings.push(format!("field `{key}` is not part of the cholec80 schema; ignored"));
            }
        }
    }
    let rec: Cholec80Record = decode(&stripped)?;
    let tools: Vec<String> = rec.tools.iter().map(|t| t.trim().to_lowercase()).collect();
    let source_qa = rec
        .qa
        .into_iter()
        .map(|qa| {
            let answer = qa.answer.trim().to_string();
            let subtask = qa.subtask.unwrap_or_else(|| {
                if tools.contains(&answer.to_lowercase()) {
                    SubTask::InstrumentCategory
                } else {
                    SubTask::InstrumentMotion
                }
            });
            SourceQa {
                kind: qa.kind,
                question: qa.question.trim().to_string(),
                answer,
                subtask,
            }
        })
        .collect();
    let frame = FrameAnnotation {
        frame_id: rec.frame_id,
        image_path: rec.image_path,
        image_size: rec.image_size.unwrap_or(CHOLEC80_DEFAULT_SIZE),
        source: Schema::Cholec80.to_string(),
        instruments: tools
            .into_iter()
            .map(|category| InstrumentObservation {
                category,
                bbox: None,
                motion: None,
                direction: None,
            })
            .collect(),
        tissues: vec![],
        phase: rec.phase.map(|p| p.trim().to_string()),
        description_seed: None,
        source_qa,
    };
    Ok(Adapted {
        frame: finish(frame, &MotionPolicy::relaxed())?,
        warnings,
    })
}

// ---- canonical ---------------------------------------------------------------

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CanonicalRecord {
    frame_id: String,
    image_path: String,
    image_size: (u32, u32),
    #[serde(default)]
    source: String,
    #[serde(default)]
    instruments: Vec<CanonicalInstrument>,
    #[serde(default)]
    tissues: Vec<CanonicalTissue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description_seed: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    source_qa: Vec<SourceQa>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CanonicalInstrument {
    category: String,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<PixelBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    motion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<String>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CanonicalTissue {
    name: String,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<PixelBox>,
}

fn policy_for_source(source: &str) -> MotionPolicy {
    match source {
        "endovis" | "cholec80" => MotionPolicy::relaxed(),
        _ => MotionPolicy::default(),
    }
}

pub fn adapt_canonical(record: &Value) -> Result<Adapted, AnnotationError> {
    let rec: CanonicalRecord = decode(record)?;
    let size = rec.image_size;
    if size.0 == 0 || size.1 == 0 {
        return Err(AnnotationError::Validation {
            frame_id: rec.frame_id,
            message: format!("image size must be positive, got {}x{}", size.0, size.1),
        });
    }
    let mut instruments = Vec::with_capacity(rec.instruments.len());
    for (i, inst) in rec.instruments.into_iter().enumerate() {
        let bbox = inst
            .bbox
            .map(|px| normalize_at(&rec.frame_id, &format!("instruments[{i}].box"), px, size))
            .transpose()?;
        let direction = inst
            .direction
            .as_deref()
            .map(|d| parse_direction(&format!("instruments[{i}].direction"), d))
            .transpose()?;
        instruments.push(InstrumentObservation {
            category: inst.category,
            bbox,
            motion: inst.motion,
            direction,
        });
    }
    let mut tissues = Vec::with_capacity(rec.tissues.len());
    for (i, t) in rec.tissues.into_iter().enumerate() {
        let bbox = t
            .bbox
            .map(|px| normalize_at(&rec.frame_id, &format!("tissues[{i}].box"), px, size))
            .transpose()?;
        tissues.push(TissueObservation { name: t.name, bbox });
    }
    let policy = policy_for_source(&rec.source);
    let frame = FrameAnnotation {
        frame_id: rec.frame_id,
        image_path: rec.image_path,
        image_size: size,
        source: rec.source,
        instruments,
        tissues,
        phase: rec.phase,
        description_seed: rec.description_seed,
        source_qa: rec.source_qa,
    };
    Ok(Adapted {
        frame: finish(frame, &policy)?,
        warnings: vec![],
    })
}

/// Render a frame in the canonical ingestion format (pixel boxes).
pub fn to_canonical_line(frame: &FrameAnnotation) -> String {
    let (w, h) = frame.image_size;
    let rec = CanonicalRecord {
        frame_id: frame.frame_id.clone(),
        image_path: frame.image_path.clone(),
        image_size: frame.image_size,
        source: frame.source.clone(),
        instruments: frame
            .instruments
            .iter()
            .map(|i| CanonicalInstrument {
                category: i.category.clone(),
                bbox: i.bbox.as_ref().map(|b| PixelBox::from_normalized(b, w, h)),
                motion: i.motion.clone(),
                direction: i.direction.map(|d| d.to_string()),
            })
            .collect(),
        tissues: frame
            .tissues
            .iter()
            .map(|t| CanonicalTissue {
                name: t.name.clone(),
                bbox: t.bbox.as_ref().map(|b| PixelBox::from_normalized(b, w, h)),
            })
            .collect(),
        phase: frame.phase.clone(),
        description_seed: frame.description_seed.clone(),
        source_qa: frame.source_qa.clone(),
    };
    serde_json::to_string(&rec).expect("canonical record serializes")
}

pub fn adapt_line(schema: Schema, line: &str) -> Result<Adapted, AnnotationError> {
    let value: Value = serde_json::from_str(line).map_err(|e| AnnotationError::Schema {
        path: format!("column {}", e.column()),
        message: e.to_string(),
    })?;
    match schema {
        Schema::Endovis => adapt_endovis(&value),
        Schema::Copesd => adapt_copesd(&value),
        Schema::Cholec80 => adapt_cholec80(&value),
        Schema::Canonical => adapt_canonical(&value),
    }
}

/// Read a line-delimited annotation file. Blank lines are skipped; the
/// first bad line aborts with its 1-based line number in the error path.
pub fn read_frames<R: BufRead>(
    schema: Schema,
    reader: R,
) -> Result<(Vec<FrameAnnotation>, Vec<String>), AnnotationError> {
    let mut frames = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AnnotationError::Schema {
            path: format!("line {}", idx + 1),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let adapted = adapt_line(schema, &line).map_err(|e| match e {
            AnnotationError::Schema { path, message } => AnnotationError::Schema {
                path: format!("line {}: {path}", idx + 1),
                message,
            },
            other => other,
        })?;
        warnings.extend(
            adapted
                .warnings
                .into_iter()
                .map(|w| format!("line {} ({}): {w}", idx + 1, adapted.frame.frame_id)),
        );
        frames.push(adapted.frame);
    }
    Ok((frames, warnings))
}
