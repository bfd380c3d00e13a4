//! `SMF1` checkpoints: magic, version, a length-prefixed `key=value` metadata
//! block in sorted key order, then every parameter as little-endian `f32`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::{io_err, HarnessError};
use crate::flow::{TeacherModel, VelocityArch};
use crate::isc::StudentModel;
use crate::nn::{ParamSet, Tensor};
use crate::refine::{DiscArch, Discriminator};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMF1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch { expected: String, found: ModelKind },
    #[error("checkpoint architecture {found} does not match the expected {expected}")]
    ArchMismatch { expected: String, found: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Teacher,
    Student,
    Regularizer,
    Discriminator,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Teacher => "teacher",
            ModelKind::Student => "student",
            ModelKind::Regularizer => "regularizer",
            ModelKind::Discriminator => "discriminator",
        }
    }

    fn parse(s: &str) -> Result<Self, CheckpointError> {
        [
            ModelKind::Teacher,
            ModelKind::Student,
            ModelKind::Regularizer,
            ModelKind::Discriminator,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| CheckpointError::Format(format!("unknown model kind '{s}'")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    /// Training iterations behind the parameters.
    pub iteration: u64,
    /// Stage fingerprint of the config that produced the checkpoint.
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelArch {
    Velocity(VelocityArch),
    Disc(DiscArch),
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ModelArch {
    fn fields(&self) -> Vec<(&'static str, String)> {
        match self {
            ModelArch::Velocity(a) => vec![
                ("arch.state_dim", a.state_dim.to_string()),
                ("arch.cond_dim", a.cond_dim.to_string()),
                ("arch.embed_dim", a.embed_dim.to_string()),
                ("arch.hidden", join(&a.hidden)),
            ],
            ModelArch::Disc(a) => vec![
                ("arch.input_dim", a.input_dim.to_string()),
                ("arch.patch_side", a.patch_side.map_or("none".into(), |s| s.to_string())),
                ("arch.hidden", join(&a.hidden)),
            ],
        }
    }

    fn describe(&self) -> String {
        self.fields()
            .iter()
            .map(|(k, v)| format!("{}={v}", &k[5..]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn parse(kind: ModelKind, meta: &BTreeMap<String, String>) -> Result<Self, CheckpointError> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| CheckpointError::Format(format!("missing metadata key '{k}'")))
        };
        let num = |k: &str| -> Result<usize, CheckpointError> {
            get(k)?
                .parse()
                .map_err(|_| CheckpointError::Format(format!("bad value for '{k}'")))
        };
        let hidden = {
            let s = get("arch.hidden")?;
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(',')
                    .map(|x| {
                        x.parse()
                            .map_err(|_| CheckpointError::Format("bad value for 'arch.hidden'".into()))
                    })
                    .collect::<Result<Vec<usize>, _>>()?
            }
        };
        Ok(match kind {
            ModelKind::Discriminator => ModelArch::Disc(DiscArch {
                input_dim: num("arch.input_dim")?,
                patch_side: match get("arch.patch_side")?.as_str() {
                    "none" => None,
                    _ => Some(num("arch.patch_side")?),
                },
                hidden,
            }),
            _ => ModelArch::Velocity(VelocityArch {
                state_dim: num("arch.state_dim")?,
                cond_dim: num("arch.cond_dim")?,
                embed_dim: num("arch.embed_dim")?,
                hidden,
            }),
        })
    }
}

fn mlp_shapes(sizes: &[usize]) -> Vec<(String, usize, usize)> {
    let mut shapes = Vec::new();
    for (i, w) in sizes.windows(2).enumerate() {
        shapes.push((format!("layer{i}.weight"), w[0], w[1]));
        shapes.push((format!("layer{i}.bias"), 1, w[1]));
    }
    shapes
}

/// A model that can be written to and restored from a checkpoint.
pub trait CheckpointModel: Sized {
    fn arch(&self) -> ModelArch;
    fn params(&self) -> &ParamSet<f32>;
    fn accepts(kind: ModelKind) -> bool;
    /// Parameter names and shapes an architecture implies, in payload order.
    fn expected_shapes(arch: &ModelArch) -> Result<Vec<(String, usize, usize)>, CheckpointError>;
    fn assemble(arch: ModelArch, params: ParamSet<f32>) -> Result<Self, CheckpointError>;
}

fn velocity(arch: &ModelArch) -> Result<&VelocityArch, CheckpointError> {
    match arch {
        ModelArch::Velocity(a) => Ok(a),
        ModelArch::Disc(_) => Err(CheckpointError::Format("expected a velocity architecture".into())),
    }
}

fn nn_format(e: crate::nn::NnError) -> CheckpointError {
    CheckpointError::Format(e.to_string())
}

impl CheckpointModel for TeacherModel<f32> {
    fn arch(&self) -> ModelArch {
        ModelArch::Velocity(self.arch.clone())
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn accepts(kind: ModelKind) -> bool {
        matches!(kind, ModelKind::Teacher | ModelKind::Regularizer)
    }

    fn expected_shapes(arch: &ModelArch) -> Result<Vec<(String, usize, usize)>, CheckpointError> {
        Ok(mlp_shapes(&velocity(arch)?.layer_sizes()))
    }

    fn assemble(arch: ModelArch, params: ParamSet<f32>) -> Result<Self, CheckpointError> {
        TeacherModel::from_params(velocity(&arch)?.clone(), params).map_err(nn_format)
    }
}

impl CheckpointModel for StudentModel<f32> {
    fn arch(&self) -> ModelArch {
        ModelArch::Velocity(self.arch.clone())
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn accepts(kind: ModelKind) -> bool {
        kind == ModelKind::Student
    }

    fn expected_shapes(arch: &ModelArch) -> Result<Vec<(String, usize, usize)>, CheckpointError> {
        let a = velocity(arch)?;
        let mut shapes = mlp_shapes(&a.layer_sizes());
        for name in ["time.proj_t", "time.proj_r"] {
            shapes.push((name.into(), a.embed_dim, a.embed_dim));
        }
        Ok(shapes)
    }

    fn assemble(arch: ModelArch, params: ParamSet<f32>) -> Result<Self, CheckpointError> {
        StudentModel::from_params(velocity(&arch)?.clone(), params).map_err(nn_format)
    }
}

impl CheckpointModel for Discriminator<f32> {
    fn arch(&self) -> ModelArch {
        ModelArch::Disc(self.arch.clone())
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn accepts(kind: ModelKind) -> bool {
        kind == ModelKind::Discriminator
    }

    fn expected_shapes(arch: &ModelArch) -> Result<Vec<(String, usize, usize)>, CheckpointError> {
        match arch {
            ModelArch::Disc(a) => Ok(mlp_shapes(&a.layer_sizes())),
            ModelArch::Velocity(_) => Err(CheckpointError::Format("expected a discriminator architecture".into())),
        }
    }

    fn assemble(arch: ModelArch, params: ParamSet<f32>) -> Result<Self, CheckpointError> {
        match arch {
            ModelArch::Disc(a) => Discriminator::from_params(a, params).map_err(nn_format),
            ModelArch::Velocity(_) => Err(CheckpointError::Format("expected a discriminator architecture".into())),
        }
    }
}

/// Serializes a model and its metadata.
pub fn encode_checkpoint<M: CheckpointModel>(model: &M, meta: &CheckpointMeta) -> Result<Vec<u8>, CheckpointError> {
    if !M::accepts(meta.kind) {
        return Err(CheckpointError::Format(format!(
            "model cannot be stored as kind '{}'",
            meta.kind
        )));
    }
    if meta.fingerprint.contains(['\n', '=']) {
        return Err(CheckpointError::Format(
            "fingerprint may not contain '=' or newlines".into(),
        ));
    }
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    fields.insert("kind".into(), meta.kind.name().into());
    fields.insert("iteration".into(), meta.iteration.to_string());
    fields.insert("fingerprint".into(), meta.fingerprint.clone());
    for (k, v) in model.arch().fields() {
        fields.insert(k.into(), v);
    }
    for (i, p) in model.params().iter().enumerate() {
        let (r, c) = p.value.shape();
        fields.insert(format!("param.{i:04}"), format!("{}:{r}x{c}", p.name));
    }
    let text: String = fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

    let payload_len: usize = model.params().iter().map(|p| p.value.len()).sum();
    let mut out = Vec::with_capacity(12 + text.len() + 4 * payload_len);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for p in model.params().iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Header {
    meta: CheckpointMeta,
    arch: ModelArch,
    declared: Vec<(String, usize, usize)>,
    payload_offset: usize,
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    let end = at.checked_add(n).ok_or(CheckpointError::Truncated)?;
    let s = bytes.get(*at..end).ok_or(CheckpointError::Truncated)?;
    *at = end;
    Ok(s)
}

fn u32_at(bytes: &[u8], at: &mut usize) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(take(bytes, at, 4)?.try_into().expect("4 bytes")))
}

fn parse_header(bytes: &[u8]) -> Result<Header, CheckpointError> {
    let mut at = 0;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    at += 4;
    let version = u32_at(bytes, &mut at)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let len = u32_at(bytes, &mut at)? as usize;
    let text = std::str::from_utf8(take(bytes, &mut at, len)?)
        .map_err(|_| CheckpointError::Format("metadata is not UTF-8".into()))?;
    let mut fields = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Format(format!("bad metadata line '{line}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let field = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| CheckpointError::Format(format!("missing metadata key '{k}'")))
    };
    let kind = ModelKind::parse(field("kind")?)?;
    let meta = CheckpointMeta {
        kind,
        iteration: field("iteration")?
            .parse()
            .map_err(|_| CheckpointError::Format("bad iteration".into()))?,
        fingerprint: field("fingerprint")?.clone(),
    };
    let arch = ModelArch::parse(kind, &fields)?;
    let mut declared = Vec::new();
    for (k, v) in fields.range("param.".to_string()..) {
        if !k.starts_with("param.") {
            break;
        }
        let bad = || CheckpointError::Format(format!("bad parameter entry '{v}'"));
        let (name, shape) = v.rsplit_once(':').ok_or_else(bad)?;
        let (r, c) = shape.split_once('x').ok_or_else(bad)?;
        declared.push((
            name.to_string(),
            r.parse().map_err(|_| bad())?,
            c.parse().map_err(|_| bad())?,
        ));
    }
    Ok(Header {
        meta,
        arch,
        declared,
        payload_offset: at,
    })
}

/// Restores a model. When `expected` is given, a different architecture is
/// rejected before any parameter storage is allocated.
pub fn decode_checkpoint<M: CheckpointModel>(
    bytes: &[u8],
    expected: Option<&ModelArch>,
) -> Result<(M, CheckpointMeta), CheckpointError> {
    let header = parse_header(bytes)?;
    if !M::accepts(header.meta.kind) {
        return Err(CheckpointError::KindMismatch {
            expected: std::any::type_name::<M>().rsplit("::").next().unwrap_or("model").into(),
            found: header.meta.kind,
        });
    }
    if let Some(exp) = expected {
        if *exp != header.arch {
            return Err(CheckpointError::ArchMismatch {
                expected: exp.describe(),
                found: header.arch.describe(),
            });
        }
    }
    let shapes = M::expected_shapes(&header.arch)?;
    if shapes != header.declared {
        return Err(CheckpointError::Format(
            "declared parameter shapes do not match the architecture".into(),
        ));
    }
    let total: usize = shapes.iter().map(|s| s.1 * s.2).sum();
    let payload = &bytes[header.payload_offset..];
    if payload.len() < 4 * total {
        return Err(CheckpointError::Truncated);
    }
    if payload.len() > 4 * total {
        return Err(CheckpointError::Format(
            "trailing bytes after the parameter payload".into(),
        ));
    }
    let mut params = ParamSet::new();
    let mut words = payload
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes(w.try_into().expect("4 bytes")));
    for (name, r, c) in shapes {
        params.push(name, Tensor::new(r, c, words.by_ref().take(r * c).collect()));
    }
    Ok((M::assemble(header.arch, params)?, header.meta))
}

fn ckpt_err(path: &Path) -> impl FnOnce(CheckpointError) -> HarnessError + '_ {
    move |source| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file so an interrupted save leaves no partial checkpoint.
pub fn save_checkpoint<M: CheckpointModel>(model: &M, meta: &CheckpointMeta, path: &Path) -> Result<(), HarnessError> {
    let bytes = encode_checkpoint(model, meta).map_err(ckpt_err(path))?;
    let tmp = path.with_extension("smf.tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint<M: CheckpointModel>(path: &Path) -> Result<(M, CheckpointMeta), HarnessError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes, None).map_err(ckpt_err(path))
}

pub fn load_checkpoint_expecting<M: CheckpointModel>(
    path: &Path,
    expected: &ModelArch,
) -> Result<(M, CheckpointMeta), HarnessError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes, Some(expected)).map_err(ckpt_err(path))
}

/// Metadata only; the payload is not decoded.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta, HarnessError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    parse_header(&bytes).map(|h| h.meta).map_err(ckpt_err(path))
}
